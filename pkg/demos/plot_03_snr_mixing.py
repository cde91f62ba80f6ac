"""
Mixing noise into speech at a target SNR
=========================================

Synthesize a tone and a coloured noise, mix them at 0 to 20 dB, write
16-bit WAVs and measure the SNR again after reading them back.
"""

import tempfile
from pathlib import Path

from edrl_mea import SNR_LEVELS, NoiseSpec, measure_snr, mix_at_snr, read_wav, write_wav
from edrl_mea.synthetic import colored_noise, tone

# a quiet tone leaves headroom so the 0 dB mix does not clip
clean = tone(220.0, seconds=1.5, amplitude=0.1)
noise = colored_noise(3.0, seed=4, alpha=1.0)
out = Path(tempfile.mkdtemp())

write_wav(out / "clean.wav", clean)
for level in SNR_LEVELS:
    mixed, gain, offset = mix_at_snr(clean, noise, NoiseSpec("pink", level, seed=7),
                                     return_details=True)
    path = out / f"mixed_{level:g}dB.wav"
    write_wav(path, mixed)
    back = measure_snr(read_wav(out / "clean.wav"), read_wav(path))
    print(f"{level:5.1f} dB  gain {gain:.4f}  offset {offset:6d}  "
          f"before write {measure_snr(clean, mixed):8.4f}  after {back:8.4f}")
