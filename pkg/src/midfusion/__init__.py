"""RGB-T tracking with a frozen one-stream transformer and lightweight prompters.

The foundation model stays frozen; only the prompter bank is trained. Two
modality streams run separately for the first N blocks, are fused by a
middle-fusion prompter, and share the remaining blocks.
"""
from .config import RunConfig, TrackerConfig, parse_config
from .foundation import Foundation
from .pipeline import ModalFramePair, Tracker, track
from .prompters import PrompterBank, init_prompter_bank

__all__ = ["RunConfig", "TrackerConfig", "parse_config", "Foundation", "ModalFramePair", "Tracker", "track",
           "PrompterBank", "init_prompter_bank"]
__version__ = "0.1.0"
