class ConfigError(ValueError):
    """Invalid scenario or plan. ``problems`` lists field-level messages."""

    def __init__(self, problems: list[str] | str):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))
