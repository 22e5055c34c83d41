from pathlib import Path

from smident.cli import cmd_estimate, cmd_identify, cmd_report
from smident.config import load_config

CONFIG_FILE = Path("configs/benchmark.json")


def main() -> None:
    print("Loading config...")
    cfg = load_config(CONFIG_FILE)

    print("Estimating noise bound, order and decay envelope...")
    summary = cmd_estimate(cfg)
    print("dbar:", round(summary.dbar, 4))
    print("pbar:", summary.pbar)
    print("o:", summary.o)
    print("rho_hat:", round(summary.rho_hat, 4))
    print("Lz_hat:", round(summary.Lz_hat, 4))
    print("Lu_hat:", round(summary.Lu_hat, 4))

    print("Identifying predictors...")
    cmd_identify(cfg)

    print("Writing report...")
    table = cmd_report(cfg)
    print(f"Comparison table saved at: {table}")


if __name__ == "__main__":
    main()
