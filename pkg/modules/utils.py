"""
Small numeric helpers shared by the controllers and the simulator.
"""
import logging
import math

log = logging.getLogger()


class Debounce:
    """
    Report a condition only after it held for `frames` consecutive updates.

    d = Debounce(3)
    d.update(True)   # False
    d.update(True)   # False
    d.update(True)   # True
    d.update(False)  # False
    """

    def __init__(self, frames: int):
        if frames < 1:
            raise ValueError(f"Debounce needs at least one frame, got {frames}")
        self.frames = frames
        self.count = 0

    def update(self, condition: bool) -> bool:
        self.count = self.count + 1 if condition else 0
        return self.count >= self.frames

    def reset(self):
        self.count = 0


class Hysteresis:
    """
    Two-level threshold: switches on above `on_threshold`, off below `off_threshold`.

    h = Hysteresis(off_threshold=0.95, on_threshold=1.05)
    h.update(1.0)   # False
    h.update(1.1)   # True
    h.update(1.0)   # True
    h.update(0.9)   # False
    """

    def __init__(self, off_threshold: float, on_threshold: float, initial_state: bool = False):
        if off_threshold > on_threshold:
            raise ValueError(f"off threshold {off_threshold} above on threshold {on_threshold}")
        self.off_threshold = off_threshold
        self.on_threshold = on_threshold
        self.state = initial_state

    def update(self, value: float) -> bool:
        if self.state:
            self.state = value >= self.off_threshold
        else:
            self.state = value > self.on_threshold
        return self.state


def clamp(value: float, low: float, high: float) -> float:
    return min(max(value, low), high)


def signed_clamp(value: float, limit: float) -> float:
    """
    Clamp the magnitude of `value` to `limit`, keeping its sign.

    :param value: input value
    :param limit: non-negative magnitude limit
    :return: clamped value
    """
    return math.copysign(min(abs(value), limit), value)


def angle_difference_mod_pi(a: float, b: float) -> float:
    """
    Smallest absolute difference between two line orientations (radians, period pi).
    """
    d = (a - b) % math.pi
    return min(d, math.pi - d)
