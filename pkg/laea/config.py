"""
Configuration module for the laea toolkit.

Loads configuration from environment variables and .env file.
Experiment documents are validated separately (see harness.ExperimentConfig);
everything that comes from the process environment is accessed through here.
"""

import os
from pathlib import Path

from dotenv import load_dotenv

# Load environment variables from .env file
# First try current directory, then the repository root
load_dotenv()

env_path = Path(__file__).parent.parent / ".env"
if env_path.exists():
    load_dotenv(env_path)

_TRUTHY = {"1", "true", "yes", "on"}


class Config:
    """Toolkit configuration loaded from environment variables."""

    # OpenAI-compatible endpoint used when an experiment arm does not name one.
    # Ollama and vLLM both serve this API under /v1.
    LAEA_ENDPOINT: str = os.environ.get("LAEA_ENDPOINT", "http://localhost:11434/v1")
    LAEA_MODEL: str = os.environ.get("LAEA_MODEL", "llama3:8b-instruct-q4_0")

    # Name of the variable that holds the key, not the key itself
    LAEA_API_KEY_ENV: str = os.environ.get("LAEA_API_KEY_ENV", "OPENAI_API_KEY")

    # Harness settings
    LAEA_JOBS: int = int(os.environ.get("LAEA_JOBS", "1"))
    LAEA_OUTPUT_DIR: str = os.environ.get("LAEA_OUTPUT_DIR", "results")
    LAEA_LOG_LEVEL: str = os.environ.get("LAEA_LOG_LEVEL", "INFO")

    # Mock chat-completions server
    MOCK_HOST: str = os.environ.get("MOCK_HOST", "0.0.0.0")
    MOCK_PORT: int = int(os.environ.get("MOCK_PORT", "8080"))

    @classmethod
    def no_network(cls) -> bool:
        """Whether HTTP backends must be replaced by in-process mocks (CI mode).

        Read at call time so tests and wrappers can toggle it.
        """
        return os.environ.get("NO_NETWORK", "").strip().lower() in _TRUTHY

    @classmethod
    def get_api_key(cls, env_name: str | None = None) -> str:
        """Read the API key from the named environment variable."""
        return os.environ.get(env_name or cls.LAEA_API_KEY_ENV, "")

    @classmethod
    def get_output_dir(cls) -> Path:
        """Get the default results directory."""
        return Path(cls.LAEA_OUTPUT_DIR)


# Singleton instance for easy import
config = Config()
