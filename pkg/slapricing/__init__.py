"""SLA pricing package: QoS-differentiated posted prices, capacity planning
and simulation for a fixed fleet of identical servers.

Modules:
- config: environment-driven settings
- errors: exception hierarchy
- logs: logfire setup
- special: upper incomplete gamma function for negative orders
- queueing: closed-form waiting-time and utilization laws (Q₁, Q₂)
- market: users, utility shapes, SLA menus and user choice
- planner: virtual-queue capacity planning on m servers
- optimizer: breakpoint pricing and the revenue-maximizing menu search
- simulator: discrete-event simulation of processing units
- scenario: YAML scenario files
- experiments: experiment battery and tabular output
- runner: CLI entry point
"""

__all__ = [
    "config",
    "errors",
    "logs",
    "special",
    "queueing",
    "market",
    "planner",
    "optimizer",
    "simulator",
    "scenario",
    "experiments",
    "runner",
]
