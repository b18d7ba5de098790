import sys


sys.path.append('')
from gffperc.cli import main


# export PYTHONPATH=`pwd`; python src/gffperc_run.py estimate hstar --d 3 --h-grid 0 0.5 1 1.5 2 --depth 25 --replicas 10000 --seed 7
if __name__ == '__main__':
    sys.exit(main())
