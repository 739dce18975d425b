"""Multi-proposal action-chunk policies with learned proposal scoring, plus
baselines, synthetic multimodal tasks, teleoperation math and the
locomotion observation pipeline."""

__version__ = "0.1.0"
