from typing import Tuple

import numpy as np
import numpy.typing as npt

ComplexArray = npt.NDArray[np.complex128]
RealArray = npt.NDArray[np.float64]
IndexArray = npt.NDArray[np.int64]

Mode = Tuple[int, ...]
