"""Capture beacons near a future patient and replay them elsewhere.

The attacker records for ten minutes and rebroadcasts the recording 1 km
away after some delay.  Whether the far-away victim is falsely told they
were exposed depends on how tightly each design binds an EphID to time.
"""

from proxtrace.sim import REPLAY_CELLS, random_relay_scenario, relay_scenario, run_relay_attack

TRIALS = 40

print(f"{'cell':<24}{'design':<12}{'success':>10}")
for cell, (design, _) in REPLAY_CELLS.items():
    wins = sum(run_relay_attack(random_relay_scenario(cell, seed)).succeeded for seed in range(TRIALS))
    print(f"{cell:<24}{design.value:<12}{wins:>6}/{TRIALS}")

# one trial in detail: low-cost, one hour of delay, same day
out = run_relay_attack(relay_scenario("low_cost", delay_h=1.0, capture_start_h=9.0))
print()
print(f"low-cost, 1 h delay: {out.relayed_receives} relayed beacons heard, "
      f"{out.false_matches} false match(es)")
for ev in out.result.events.of_kind("match"):
    how = "heard the patient directly" if ev["genuine"] else "only heard the patient through the relay"
    print(f"  {ev['agent']} matched and {how}")
