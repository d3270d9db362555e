import numpy as np
import pytest

from prosody_rl import gridworld


@pytest.fixture(scope="session")
def grid12():
    return gridworld.generate_map(12, 12, 42)


@pytest.fixture(scope="session")
def solution12(grid12):
    return gridworld.value_iteration(grid12)


def sine(freq, duration_s=1.0, amplitude=0.5, sr=22050, phase=0.0):
    t = np.arange(int(duration_s * sr)) / sr
    return amplitude * np.sin(2 * np.pi * freq * t + phase)
