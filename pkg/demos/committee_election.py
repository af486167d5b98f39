#!/usr/bin/env python3
"""Elect a committee from 20 nodes: VRF self-selection, the reputation
eligibility gate, and the consensus/candidate/spare split. Then poison half
the nodes' records and watch the gate demote them."""

from ebrc.crypto import KeyRegistry, SimulatedVrf
from ebrc.election import VRF_RANGE, ElectionConfig, form_committee
from ebrc.reputation import ConfirmedReport, Participation, new_record, update_behavior_table

NODES = 20
registry = KeyRegistry(seed=b"election-demo")
for node in range(NODES):
    registry.register(node)

table = {node: new_record(node, registry.public_key(node), deposit=100.0) for node in range(NODES)}
table = update_behavior_table(table, [Participation(node_id=n) for n in range(NODES)])

config = ElectionConfig(
    sortition_threshold=0.7,
    target_committee_size=4,
    eligibility_percentile=0.85,
    consensus_percentile=0.5,
)
epoch_seed = b"demo-epoch-1"

vrf = SimulatedVrf(registry)
print(f"sortition at omega = {config.sortition_threshold}: normalized VRF draw per node")
for node in range(NODES):
    draw = vrf.evaluate(registry.secret_key(node), epoch_seed).value / VRF_RANGE
    mark = "<- self-selects" if draw <= config.sortition_threshold else ""
    print(f"  node {node:2d}  {draw:.3f}  {mark}")

committee, reports = form_committee(table, config, epoch_seed, registry, epoch=1)
print()
print("consensus nodes:", sorted(committee.consensus_nodes))
print("candidates:     ", sorted(committee.candidates))
print("spares:         ", sorted(committee.spares))
print("fault budget f =", committee.f, " first master: node",
      committee.consensus_nodes[committee.master_index])
print("misbehavior reports:", reports)

# Poison the odd ids: confirmed misbehavior reports raise their evil rate,
# and the eligibility gate ranks them out of the committee bands.
poison = [ConfirmedReport(node_id=n) for n in range(1, NODES, 2) for _ in range(3)]
poisoned_table = update_behavior_table(table, poison)

poisoned_committee, _ = form_committee(poisoned_table, config, epoch_seed, registry, epoch=2)
print()
print("after poisoning the odd ids:")
print("consensus nodes:", sorted(poisoned_committee.consensus_nodes))
print("candidates:     ", sorted(poisoned_committee.candidates))
odd_in = sum(1 for n in poisoned_committee.committee if n % 2 == 1)
print(f"odd ids still elected: {odd_in} of {len(poisoned_committee.committee)} members")
