""".. include:: ../README.md

# Using hirex

Most of the API is available from a single import:
```python3
import hirex as hx

g = hx.load_kg("data/desk", "tsv")
config = hx.load_train_config(None, preset="smoke")
checkpoint = hx.train(g, g.splits["train"], config)
report = hx.evaluate(checkpoint.store(), g, hx.evaluation_tasks(g, "test", 5, 50, 0), config)
```

The autodiff engine lives in `hirex.tensor`, its ops in `hirex.tensor.ops`.
"""  # noqa: D415

# flake8: noqa
# Ignoring flake8 errors F401,F403 because of star imports

from . import tensor
from .errors import *
from .util import *
from .assets import *
from .config import *
from .kg import *
from .synthetic import *
from .tasks import *
from .layers import *
from .context import *
from .relation import *
from .params import *
from .model import *
from .evaluation import *
from .pretrain import *
from .trainer import *
from .cli import *
