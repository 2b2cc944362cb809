"""Real-time detection of when a user needs assistance.

Gaze-pattern models and an utterance classifier each emit a continuous
need value; a sliding-window random forest fuses them into a binary
help decision.  Includes the stream substrate, session persistence,
two-stage training, a session simulator, an evaluation harness, and a
command-line interface.
"""

__version__ = "0.1.0"
