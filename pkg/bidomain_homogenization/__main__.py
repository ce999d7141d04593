# Copyright 2026 Bidomain Homogenization contributors
# License LGPL-3.0 or later (http://www.gnu.org/licenses/lgpl).

import sys

from .controllers.cli import main

sys.exit(main())
