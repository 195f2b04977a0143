class StrOutputParser:
    """Parse the output of an LLM call to a plain string."""

    def parse(self, text: str) -> str:
        return text
