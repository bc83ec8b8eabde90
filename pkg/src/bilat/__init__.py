"""Bilateral-teleoperation imitation learning sandbox.

Subpackages: dynamics (manipulator + contact simulation), control
(observers and the 4ch coupling law), expert (scripted teleoperation
data collection), dataset (persistence), network/training (sequence
models), executor (autonomous execution), metrics (evaluation),
config/pipeline/cli (experiment harness).
"""

__version__ = "0.1.0"
