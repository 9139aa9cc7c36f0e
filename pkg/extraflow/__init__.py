__title__ = 'extraflow'
__license__ = 'MIT'
__version__ = '0.1.0'

from .errors import *
from .flow import *
from .guidance import *
from .oracle import *
from .projection import *
from .toolkit import *
from .toy_mmdit import *
