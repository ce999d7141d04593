from . import expressions
from . import geometry
from . import fem
from . import ionics
from . import cell_problems
from . import micro_solver
from . import macro_solver
