"""Post-traumatic epilepsy risk from serialized, embedded clinical records."""

__version__ = "0.1.0"
