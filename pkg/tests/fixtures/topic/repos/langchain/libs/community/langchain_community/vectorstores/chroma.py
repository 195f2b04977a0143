from typing import Any, Iterable, List, Optional, Type

from langchain_core.documents import Document
from langchain_core.embeddings import Embeddings
from langchain_core.vectorstores import VectorStore


class Chroma(VectorStore):
    """ChromaDB vector store.

    Example:
        .. code-block:: python

            from langchain_community.vectorstores import Chroma
            from langchain_community.embeddings import OpenAIEmbeddings

            vectorstore = Chroma("langchain_store", OpenAIEmbeddings())
    """

    _LANGCHAIN_DEFAULT_COLLECTION_NAME = "langchain"

    def __init__(
        self,
        collection_name: str = _LANGCHAIN_DEFAULT_COLLECTION_NAME,
        embedding_function: Optional[Embeddings] = None,
        persist_directory: Optional[str] = None,
    ) -> None:
        import chromadb

        self._client = chromadb.Client()
        self._embedding_function = embedding_function
        self._collection = self._client.get_or_create_collection(name=collection_name)

    def add_texts(self, texts: Iterable[str], metadatas: Optional[List[dict]] = None, **kwargs: Any) -> List[str]:
        embeddings = None
        texts = list(texts)
        if self._embedding_function is not None:
            embeddings = self._embedding_function.embed_documents(texts)
        ids = [str(i) for i in range(len(texts))]
        self._collection.upsert(embeddings=embeddings, documents=texts, ids=ids, metadatas=metadatas)
        return ids

    @classmethod
    def from_documents(
        cls: Type["Chroma"],
        documents: List[Document],
        embedding: Optional[Embeddings] = None,
        collection_name: str = _LANGCHAIN_DEFAULT_COLLECTION_NAME,
        persist_directory: Optional[str] = None,
        **kwargs: Any,
    ) -> "Chroma":
        """Create a Chroma vectorstore from a list of documents."""
        store = cls(collection_name=collection_name, embedding_function=embedding, persist_directory=persist_directory)
        store.add_texts([d.page_content for d in documents], [d.metadata for d in documents])
        return store
