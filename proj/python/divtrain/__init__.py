from ._divtrain import *  # noqa: F401,F403
from ._divtrain import __doc__  # noqa: F401
