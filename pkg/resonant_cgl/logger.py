import logging
from typing import Any, Mapping, Optional, Protocol

_LogLevelMap = {
    logging.DEBUG: "debug",
    logging.INFO: "info",
    logging.WARNING: "warning",
    logging.ERROR: "error",
    logging.CRITICAL: "error",
}


def _convert_loglevel(loglevel: int) -> str:
    return _LogLevelMap.get(loglevel, "info")


class RecordWriter(Protocol):
    def write(self, record: Mapping[str, Any]) -> None:
        ...


class ArtifactLogHandler(logging.Handler):
    """Forwards log records to the run's NDJSON log once a writer is attached."""

    def __init__(self) -> None:
        super().__init__(logging.DEBUG)

        self._writer: Optional[RecordWriter] = None

    @property
    def writer(self) -> Optional[RecordWriter]:
        return self._writer

    @writer.setter
    def writer(self, writer: Optional[RecordWriter]) -> None:
        self._writer = writer

    def emit(self, record: logging.LogRecord) -> None:
        writer = self.writer
        if writer is None:
            return

        writer.write(
            {
                "type": "log",
                "level": _convert_loglevel(record.levelno),
                "logger": record.name,
                "message": record.getMessage(),
            }
        )
