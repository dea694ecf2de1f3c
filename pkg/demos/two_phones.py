"""Two phones meet on a train; one owner later tests positive.

Walks the whole protocol by hand for the hybrid design: broadcasting,
receiving, the upload, slot publication, the download and the exposure
decision.  Run with ``python demos/two_phones.py``.
"""

import random

from proxtrace.backend import Backend
from proxtrace.crypto import EpochParams
from proxtrace.device import Device
from proxtrace.exposure import ExposureConfig, daily_scores, decide_notification
from proxtrace.sim import ChannelModel
from proxtrace.wire import Design, WireLimits, encode_upload

START = 1590969600  # a Monday, 00:00 UTC
params = EpochParams(epoch_minutes=15, window_minutes=240)
channel = ChannelModel()

ana = Device(Design.HYBRID, params, rng=random.Random(1))
ben = Device(Design.HYBRID, params, rng=random.Random(2))

# 08:10 to 08:50, sitting 1.5 m apart; one beacon a minute each way
att = channel.attenuation(1.5)
for minute in range(10, 50):
    t = START + 8 * 3600 + minute * 60
    ben.record_beacon(ana.ephid_at(t), t, att)
    ana.record_beacon(ben.ephid_at(t), t, att)
print(f"ben heard {ben.observation_count()} beacons at {att:.1f} dB, "
      f"stored as {len(ben.store)} groups ({ben.storage_bytes()} bytes)")

# ana tests positive that evening and uploads only the windows with a close contact
now = START + 19 * 3600
payload = ana.build_upload(contagion_start=START, now=now)
print(f"ana uploads {len(payload.window_seeds)} window seed(s): "
      f"{[w.window - params.window_of(START) for w in payload.window_seeds]} (window numbers of the day)")

backend = Backend("CH", Design.HYBRID, params, slot_minutes=120, start=now)
limits = WireLimits(params)
print("backend answers", backend.accept_upload(encode_upload(payload, limits), now))

# nothing appears until the slot ends
print("batches before the slot ends:", backend.publish_slot(now + 60))
(batch,) = backend.publish_slot(START + 20 * 3600)
print(f"slot {batch.slot_id} published {len(batch.body)} bytes at 20:00")

published = [(seed, batch.publication_time) for seed in batch.hybrid_seeds()]
matches = ben.match_hybrid(published)
cfg = ExposureConfig()
scores = daily_scores(matches, cfg, today=params.day_of(now))
decision = decide_notification(scores, cfg)
for s in scores:
    print(f"day {s.day}: {s.score:.1f} weighted minutes (threshold {cfg.threshold})")
print("notify ben:", decision.notify)
