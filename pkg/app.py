#!/usr/bin/env python3

from squeezelab.processor.run_scenario import cli


cli(prog_name='squeezelab')
