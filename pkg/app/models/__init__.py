from .base import *
from .vocab import *
from .sequence import *
from .predictor import *
from .decoding import *
from .world import *
from .evaluation import *
