"""This module specifies the paths of the files used in the project."""
import pathlib

project_root = pathlib.Path(__file__).parent.parent

path_data = project_root / "data/"
path_runs = project_root / "runs/"
path_plots = project_root / "plots/"
path_example_config = project_root / "attic/run_config.example.json"
