"""
Entry script for the LAE swarm simulator.
Run with: python lae_sim.py <subcommand> [flags]   (or: python -m src ...)
"""
import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
