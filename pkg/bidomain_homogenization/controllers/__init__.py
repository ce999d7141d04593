# Copyright 2026 Bidomain Homogenization contributors
# License LGPL-3.0 or later (http://www.gnu.org/licenses/lgpl).

from . import config
from . import cache
from . import reports
from . import experiments
from . import cli
