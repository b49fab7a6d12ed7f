import logfire


def configure_logging(debug: bool = False) -> None:
    """Keep logfire local; print records to the console only when debugging."""
    console = logfire.ConsoleOptions(min_log_level="debug") if debug else False
    logfire.configure(
        send_to_logfire=False,
        service_name="slapricing",
        console=console,
    )
