"""stixtract: staged extraction of STIX 2.1 entities and relationships from
threat-analysis reports, with human review gates and a replayable model
backend."""

__version__ = "0.1.0"

from .config import PipelineConfig
from .pipeline import Job, Pipeline, ReviewAction, Stage
from .store import JobStore

__all__ = ["PipelineConfig", "Job", "Pipeline", "ReviewAction", "Stage", "JobStore", "__version__"]
