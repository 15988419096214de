from gtprune.errors import *
from gtprune.common import *
from gtprune.universe import *
from gtprune.strategies import *
from gtprune.analysis import *
from gtprune.reduction import *
from gtprune.harness import *
