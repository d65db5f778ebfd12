"""Save a model to the text checkpoint format and reload it bit for bit."""
import tempfile
from pathlib import Path

import numpy as np

from ran import checkpoint, encoder, model, resnet

config = model.RanConfig(
    encoder=encoder.EncoderConfig(d=8, k=2, T=2),
    branch=resnet.BranchConfig(feature_maps=(4, 4)),
    num_classes=3,
    fusion="gated_highway",
)
params = model.init_params(config, 0)

path = Path(tempfile.mkdtemp()) / "demo.ckpt"
checkpoint.save_checkpoint(params, path, config.to_dict())

# Each record is name, dims and hex float64 bit patterns, so nothing is lost to decimal rounding.
for line in path.read_text().splitlines()[:4]:
    print(line[:96] + (" ..." if len(line) > 96 else ""))

saved = checkpoint.read_checkpoint(path)
restored_config = model.RanConfig.from_dict(saved.config)
print("config survives the round trip:", restored_config == config)

x = np.random.default_rng(1).standard_normal(24)
before = model.forward_logits(x, config, model.values(params)).data
after = model.forward_logits(x, restored_config, model.values(checkpoint.load_checkpoint(path))).data
print("logits bit-identical:", before.tobytes() == after.tobytes())
