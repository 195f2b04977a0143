class RetrievalQA:
    """Chain for question answering against an index."""

    def __init__(self, llm, retriever, chain_type: str = "stuff"):
        self.llm = llm
        self.retriever = retriever
        self.chain_type = chain_type

    @classmethod
    def from_chain_type(cls, llm, chain_type="stuff", retriever=None, **kwargs):
        return cls(llm, retriever, chain_type)

    def invoke(self, query):
        docs = self.retriever.get_relevant_documents(query)
        context = "\n\n".join(d.page_content for d in docs)
        return self.llm.invoke(f"{context}\n\nQuestion: {query}")
