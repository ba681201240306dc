from pathlib import Path

ASSETS_DIR = Path(__file__).parent


def asset_path(*parts: str) -> Path:
    return ASSETS_DIR.joinpath(*parts)
