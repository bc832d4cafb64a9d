"""Version stamp written into manifests, checkpoints and CSV trailers."""
import functools
import logging
import subprocess

logger = logging.getLogger(__name__)

PACKAGE_VERSION = "0.1.0"


@functools.lru_cache(maxsize=1)
def project_version() -> str:
    """`git describe --always --dirty` of the working tree, or the package version."""
    try:
        result = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True,
            text=True,
            timeout=5,
            check=True,
        )
        described = result.stdout.strip()
        if described:
            return described
    except (OSError, subprocess.SubprocessError) as exc:
        logger.debug("git describe unavailable: %s", exc)
    return PACKAGE_VERSION


def manifest_line(seed: int) -> str:
    """Trailing comment line for CSV outputs."""
    return f"# version={project_version()} seed={seed}"
