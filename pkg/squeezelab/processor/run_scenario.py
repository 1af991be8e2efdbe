import logging
import sys
import traceback
from typing import Optional

import click
import yaml
from pydantic import ValidationError

from .scenarios import INVARIANTS, ScenarioRunner
from .validators import ScenarioName, default_config_yaml, load_config

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_CONFIG = 2


def handler(config_path: str, output_dir: Optional[str] = None) -> int:
    """Runs one scenario; 0 when every hard invariant passes, 1 on failure, 2 on a bad config."""
    try:
        config = load_config(config_path)
    except (OSError, yaml.YAMLError, ValidationError, ValueError) as e:
        logger.error(f"Invalid config {config_path}: {str(e)}")
        return EXIT_CONFIG

    try:
        runner = ScenarioRunner(config, output_dir)
        report = runner.run()
        logger.info(f"Artifacts written to {runner.output_dir}")
        return EXIT_OK if report.passed else EXIT_FAILED
    except Exception as e:
        logger.error(f"Stack trace: {''.join(traceback.format_tb(e.__traceback__))}")
        logger.error(f"Error running scenario {config.scenario.value}: {str(e)}")
        return EXIT_FAILED


@click.group()
@click.option('--verbose', is_flag=True, help="Log at DEBUG level.")
def cli(verbose):
    """Numerical laboratory for generalized coherent and squeezed states."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.INFO,
                        format='%(asctime)s - %(levelname)s - %(message)s')


@cli.command()
@click.argument('config_path', type=click.Path(dir_okay=False))
@click.option('--out', 'output_dir', default=None, envvar='SQUEEZELAB_OUT',
              help="Output directory; overrides output.directory in the config.")
def run(config_path, output_dir):
    """Run the scenario described by CONFIG_PATH (YAML)."""
    sys.exit(handler(config_path, output_dir))


@cli.command('print-default-config')
@click.argument('scenario', type=click.Choice([s.value for s in ScenarioName]),
                default=ScenarioName.HARMONIC_COHERENT.value)
def print_default_config(scenario):
    """Print the fully defaulted YAML config for SCENARIO."""
    click.echo(default_config_yaml(ScenarioName(scenario)), nl=False)


@cli.command('list-scenarios')
@click.option('--invariants', is_flag=True, help="Also list the invariant catalog.")
def list_scenarios(invariants):
    """List scenario names."""
    for scenario in ScenarioName:
        click.echo(scenario.value)
    if invariants:
        click.echo('')
        for name, description in INVARIANTS.items():
            click.echo(f"{name}: {description}")


if __name__ == '__main__':
    cli()
