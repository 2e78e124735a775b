from .enums import *
from .exceptions import *
