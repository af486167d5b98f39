#!/usr/bin/env python3
"""Committee membership changes, measured: a plain exit (committee stays
above the quorum floor), an exit that forces a candidate promotion, and the
PBFT view change both are cheaper than."""

from ebrc import presets
from ebrc.harness import run_scenario

exit_report = run_scenario(presets.load("djep_exit_m26"))
join_report = run_scenario(presets.load("djep_join_m25"))
pbft_report = run_scenario(presets.load("pbft_viewchange_n26"))

flow = exit_report.membership_flows[0]
print(f"exit from a {exit_report.committee_size}-member committee "
      f"(floor 3f+1 = {3 * exit_report.fault_budget + 1} still met):")
print(f"  node {flow['node']} announced at height {flow['effective_height'] - 2},"
      f" effective at height {flow['effective_height']}")
print(f"  membership messages: {flow['messages']}"
      f"  (1 request + {exit_report.committee_size - 1} confirmations)")
print(f"  settled in {flow['settle_ms']:.1f} ms simulated,"
      f" {exit_report.view_changes_total} view changes,"
      f" all {exit_report.committed_rounds} blocks committed")
print()

flow = join_report.membership_flows[0]
print(f"exit from a {join_report.committee_size}-member committee "
      f"(floor would break, so candidate joins):")
print(f"  membership messages: {flow['messages']}"
      f"  (exit flow + change notice + join handshake)")
print(f"  settled in {flow['settle_ms']:.1f} ms simulated,"
      f" all {join_report.committed_rounds} blocks committed")
for event in join_report.membership_events:
    print(f"  event: {event}")
print()

viewchange_msgs = pbft_report.messages_by_tag["viewchange"]
print(f"PBFT view change at the same network size "
      f"(n = {pbft_report.node_count}): {viewchange_msgs} messages")
print()
print("membership change vs. full view change, messages on the wire:")
exit_msgs = exit_report.membership_flows[0]["messages"]
join_msgs = join_report.membership_flows[0]["messages"]
for label, count in (("exit", exit_msgs), ("exit+join", join_msgs),
                     ("pbft view change", viewchange_msgs)):
    print(f"  {label:18s} {count:4d}  {'#' * (count // 8)}")
