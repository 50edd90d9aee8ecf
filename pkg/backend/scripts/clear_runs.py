# backend/scripts/clear_runs.py
import sys
import os
import shutil

# --- Path Setup ---
script_dir = os.path.dirname(os.path.abspath(__file__))
backend_path = os.path.dirname(script_dir)
sys.path.append(backend_path)

from app.config import settings

RUN_MARKER = "manifest.json"


def clear_runs(output_dir: str, keep: set[str]) -> int:
    """Deletes every run directory (one holding a manifest.json) under output_dir."""
    print(f"--- Clearing run directories in {output_dir} ---")
    if not os.path.exists(output_dir):
        print(f"Output directory not found: {output_dir}")
        return 0

    removed = 0
    for item in sorted(os.listdir(output_dir)):
        item_path = os.path.join(output_dir, item)
        if item in keep:
            print(f"Keeping: {item_path}")
            continue
        if os.path.isdir(item_path) and os.path.exists(os.path.join(item_path, RUN_MARKER)):
            shutil.rmtree(item_path)
            removed += 1
            print(f"Deleted run: {item_path}")
    print(f"--- {removed} run directories removed. ---")
    return removed


if __name__ == "__main__":
    # usage: python scripts/clear_runs.py [run-name-to-keep ...]
    clear_runs(settings.OUTPUT_DIR, keep=set(sys.argv[1:]))
    print("\nOperation completed.")
