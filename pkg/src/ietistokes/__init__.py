from __future__ import annotations

import numpy as np
from numpy.typing import NDArray
from typing_extensions import TypeAlias

FloatArray: TypeAlias = NDArray[np.float64]
IntArray: TypeAlias = NDArray[np.int64]
