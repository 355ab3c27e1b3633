"""Range-aided multi-agent pose-graph fusion toolkit.

Fuses per-agent visual-odometry pose chains, parameterized as 7-DoF
similarity transforms, with sparse inter-agent and agent-to-anchor range
measurements via factor-graph least squares.  Ships with a swarm simulator
(odometry drift and UWB-style range errors), a binary wire format with a
communication-load accountant, an evaluation pipeline, and a FastAPI service
with a thin CLI client.
"""

__version__ = "0.1.0"
