"""Write the synthetic interaction and KG files used by scripts/configs/synthetic.yaml."""
import argparse

from metakrec.synthetic import BlockSpec, write_block_files

parser = argparse.ArgumentParser(description=__doc__)
parser.add_argument("directory", nargs="?", default="data/synthetic")
parser.add_argument("--seed", type=int, default=0)
args = parser.parse_args()

spec = BlockSpec(items_per_user=10, fact_mix=(1.0, 0.0, 0.0, 0.0), seed=args.seed)
for path in write_block_files(spec, args.directory):
    print(path)
