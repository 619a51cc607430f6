"""
Retry handler with learning-rate back-off for unstable fine-tuning runs.
"""

import logging

from utils.exceptions import NumericInstabilityError

logger = logging.getLogger(__name__)


class RetryHandler:
    """Retries a training call with a smaller learning rate after numeric divergence"""

    def __init__(self, max_retries=2, backoff=0.5):
        self.max_retries = max_retries
        self.backoff = backoff

    def should_retry(self, error):
        """Only divergence is retried; every other error is a real failure"""
        return isinstance(error, NumericInstabilityError)

    def get_scale(self, attempt):
        """Learning-rate multiplier of an attempt"""
        return self.backoff ** attempt

    def execute(self, func, train_config):
        """
        Execute a training function with retry logic.

        Args:
            func: Callable taking a TrainConfig
            train_config: TrainConfig of the first attempt

        Returns:
            Result of the first successful attempt

        Raises:
            NumericInstabilityError: If all retries are exhausted
        """
        for attempt in range(self.max_retries + 1):
            cfg = train_config.scaled(self.get_scale(attempt)) if attempt else train_config
            try:
                return func(cfg)
            except Exception as e:
                if not self.should_retry(e) or attempt == self.max_retries:
                    raise
                logger.warning(
                    "%s Retrying with learning rate %.4g (attempt %d/%d)",
                    e.message.splitlines()[0], train_config.lr * self.get_scale(attempt + 1),
                    attempt + 1, self.max_retries,
                )
