from .env import *
