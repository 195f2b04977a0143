class ChatPromptTemplate:
    """Prompt template for chat models."""

    def __init__(self, messages):
        self.messages = messages

    @classmethod
    def from_template(cls, template: str):
        return cls([("human", template)])

    def format_messages(self, **kwargs):
        return [(role, text.format(**kwargs)) for role, text in self.messages]
