from squeezelab.processor.run_scenario import cli

if __name__ == '__main__':
    cli(prog_name='squeezelab')
