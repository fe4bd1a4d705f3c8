"""
Expand the seeded building generator of a scenario into an explicit building list.
Run with: python scripts/generate_reference_scenario.py [SOURCE] [DEST]
Defaults: scenarios/reference.json -> scenarios/reference_explicit.json
"""
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from src.constants import REFERENCE_SCENARIO_PATH  # noqa: E402
from src.worldmodel import load_scenario, save_scenario, scenario_digest  # noqa: E402


def main() -> None:
    source = Path(sys.argv[1]) if len(sys.argv) > 1 else REFERENCE_SCENARIO_PATH
    dest = Path(sys.argv[2]) if len(sys.argv) > 2 else source.with_name("reference_explicit.json")
    print(f"Expanding {source}...")
    config = load_scenario(source)
    save_scenario(config, dest)
    print(f"Saved {len(config.buildings)} buildings to {dest} (digest {scenario_digest(config)[:12]})")


if __name__ == "__main__":
    main()
