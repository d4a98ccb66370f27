"""Linear car-following control with a learned residual and a headway safety barrier,
simulated for single CAVs and mixed CAV/HV platoons under actuator and communication delay."""

__version__ = "0.1.0"
