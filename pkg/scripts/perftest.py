"""wall clock of a short training run, compared against a stored baseline

    python scripts/perftest.py baseline   # record
    python scripts/perftest.py            # compare
"""
from __future__ import print_function

import sys
import os
import subprocess
import csv
import tempfile
import shutil
import time
import atexit

EPOCHS = '20'
CSV_BASE = os.path.join(os.path.dirname(__file__), 'perf_')
CSV_BASELINE = CSV_BASE + 'baseline.csv'
CSV_CURRENT = CSV_BASE + 'current.csv'


def timed(out_dir, *argv):
    cmd = ['ivret'] + list(argv) + ['--out-dir', out_dir]
    start = time.time()
    subprocess.check_call(cmd)
    return time.time() - start


def bench(fname_csv, out_dir):
    timed(out_dir, 'generate', '--dataset', 'synth')
    rows = []
    for model in ('rivae', 'rbivae', 'cossim_lvm'):
        seconds = timed(out_dir, 'train', '--dataset', 'synth', '--model', model,
                        '--epochs', EPOCHS)
        rows.append((model, seconds))
    with open(fname_csv, 'w') as f:
        writer = csv.writer(f)
        writer.writerow(['model', 'seconds'])
        writer.writerows(rows)


def read(fname):
    data = {}
    with open(fname) as f:
        reader = csv.reader(f)
        next(reader)
        for line in reader:
            data[line[0]] = float(line[1])
    return data


def compare_perc(baseline, current):
    p = (current - baseline) / baseline * 100
    return '{:10.2f}\t{:10.2f}\t{:10.2f} %'.format(baseline, current, p)


def compare():
    baseline = read(CSV_BASELINE)
    current = read(CSV_CURRENT)

    for model in sorted(baseline):
        if model in current:
            print('{:12}'.format(model), compare_perc(baseline[model], current[model]))


def main():
    out_dir = tempfile.mkdtemp(prefix='ivret-perf-')
    atexit.register(shutil.rmtree, out_dir)

    if 'baseline' in sys.argv:
        print('timing baseline')
        fname = CSV_BASELINE

        if os.path.exists(CSV_CURRENT):
            os.unlink(CSV_CURRENT)
    else:
        fname = CSV_CURRENT

    bench(fname, out_dir)

    if os.path.exists(CSV_CURRENT) and os.path.exists(CSV_BASELINE):
        compare()


if __name__ == '__main__':
    main()
