import os, warnings
# Keep the conic solvers single-threaded unless asked otherwise (must precede numpy import)
os.environ.setdefault('OMP_NUM_THREADS', '1')
# Silence cvxpy's inaccurate-solution warnings
warnings.filterwarnings('ignore', category=UserWarning, module='cvxpy')

from densafe import create_cli

cli = create_cli()

if __name__ == '__main__':
    cli(prog_name='densafe')
