import logging
from pathlib import Path

from celery import shared_task

from facesculpt.exceptions import FaceSculptError
from pipeline.runner import run_pipeline
from pipeline.serializers import apply_overrides, load_config, validate_config

logger = logging.getLogger(__name__)


@shared_task(bind=True)
def stylize_portrait(self, config, base_dir=None, **overrides):
    """Run the whole pipeline on a worker.

    ``config`` is either the path of a config file or the config document
    itself; relative paths in a document resolve against ``base_dir``.
    Failures come back as the error report instead of a traceback.
    """
    logger.info("stylize_portrait_started task=%s", self.request.id)
    try:
        if isinstance(config, dict):
            validated = validate_config(apply_overrides(config, **overrides), base_dir=Path(base_dir or "."))
        else:
            validated = load_config(config, **overrides)
        return run_pipeline(validated)
    except FaceSculptError as exc:
        logger.warning("stylize_portrait_failed task=%s error=%s", self.request.id, exc.code)
        return exc.as_report()
