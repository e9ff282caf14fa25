import os

from tqdm import tqdm

PROGRESS_EVERY = int(os.getenv("ENFORMER_PROGRESS_EVERY", "25"))


def say(tag: str, message: str) -> None:
    """Print a `[tag] message` line without breaking active tqdm bars."""
    tqdm.write(f"[{tag}] {message}")
