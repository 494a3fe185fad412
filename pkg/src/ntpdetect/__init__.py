"""Anomaly detection over application logs and distributed traces.

Logs and spans are mined into templates, a recurrent model learns to
predict the next template, and traces whose next spans (and logs) keep
being mispredicted are flagged.
"""

__version__ = "0.1.0"
