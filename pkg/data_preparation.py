from pathlib import Path

from smident.cli import cmd_generate
from smident.config import load_config

CONFIG_FILE = Path("configs/benchmark.json")


def main() -> None:
    print(f"Loading config from {CONFIG_FILE}...")
    cfg = load_config(CONFIG_FILE)

    if cfg.data_path:
        print(f"Splitting external record {cfg.data_path}...")
    else:
        print(f"Simulating {cfg.n_id + cfg.n_val} samples (dbar0={cfg.dbar0}, seed={cfg.seed})...")
    io_id, io_val = cmd_generate(cfg)

    print("Identification samples:", len(io_id))
    print("Validation samples:", len(io_val))
    print(f"Records saved under: {cfg.output_path / 'data'}")


if __name__ == "__main__":
    main()
