import argparse
import sys

from utils.config_manager import get_config
from utils.enhanced_reporter import ExperimentFigures
from utils import logger

log = logger.customLogger()


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description='Draw figures for experiment CSVs')
    parser.add_argument('results_dir', nargs='?', help='Directory holding the experiment CSVs')
    parser.add_argument('--out', help='Figure directory (default: <results_dir>/figures)')
    args = parser.parse_args(argv)

    results_dir = args.results_dir or get_config().get_run_config()['output_dir']
    figures = ExperimentFigures(results_dir, args.out)
    drawn = figures.generate_all()
    if not drawn:
        log.warning(f"No known experiment CSVs found in {results_dir}")
        return 1
    index = figures.write_index(drawn)
    print(f"📊 {len(drawn)} figure(s) written, index at {index}")
    return 0


if __name__ == '__main__':
    sys.exit(main())
