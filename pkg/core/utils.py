"""
Small numerical helpers shared by the flow, registration and metric code.

Functions
---------
running_mean(arrays)
    Mean of a sequence of equally shaped arrays in a fixed summation order.
interior(array, margin)
    Slice off a border strip of `margin` pixels.

Classes
-------
RunningMean
    Streaming accumulator behind `running_mean`; lets the low-memory
    registration mode reproduce the batch result exactly.
"""

import numpy as np
from django.utils.translation import gettext_lazy as _

from .exceptions import InvalidInputError


class RunningMean:
    """
    Order-fixed streaming mean of equally shaped arrays.

    The first array added is kept as an anchor and the remaining ones are
    accumulated as offsets from it, so that:
        - the mean of identical arrays is exactly that array,
        - the result only depends on the order of `add` calls, never on how
          the arrays were produced (thread count, batching).

    Example:
        >>> acc = RunningMean()
        >>> acc.add(np.ones(3)); acc.add(np.zeros(3))
        >>> acc.value()
        array([0.5, 0.5, 0.5])
    """

    def __init__(self):
        self._anchor = None
        self._offset = None
        self.count = 0

    def add(self, array):
        array = np.asarray(array, dtype=np.float64)
        if self._anchor is None:
            self._anchor = array.copy()
            self._offset = np.zeros_like(self._anchor)
        elif array.shape != self._anchor.shape:
            raise InvalidInputError(
                _("Cannot average arrays of shapes %(a)s and %(b)s.")
                % {"a": self._anchor.shape, "b": array.shape}
            )
        else:
            self._offset += array - self._anchor
        self.count += 1

    def value(self):
        if self._anchor is None:
            raise InvalidInputError(_("Cannot average an empty sequence."))
        return self._anchor + self._offset / self.count


def running_mean(arrays):
    """Return the pointwise mean of `arrays`, accumulated in order."""

    acc = RunningMean()
    for array in arrays:
        acc.add(array)
    return acc.value()


def interior(array, margin):
    """Return `array` without a `margin`-pixel border on the two leading axes."""

    if margin <= 0:
        return array
    return array[margin:-margin, margin:-margin]
