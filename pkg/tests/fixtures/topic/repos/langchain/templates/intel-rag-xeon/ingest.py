import os

from langchain.text_splitter import RecursiveCharacterTextSplitter
from langchain_community.document_loaders import UnstructuredFileLoader
from langchain_community.embeddings import HuggingFaceEmbeddings
from langchain_community.vectorstores import Chroma

DATA_PATH = os.path.join(os.path.dirname(__file__), "data", "nke-10k-2023.pdf")
INDEX_DIR = os.environ.get("CHROMA_DIR", "chroma_db")


def ingest_documents():
    """
    Ingest PDF to Chroma from the data/ directory that
    contains Nike's 10k filing data.
    """
    loader = UnstructuredFileLoader(DATA_PATH, mode="elements")
    data = loader.load()

    text_splitter = RecursiveCharacterTextSplitter(chunk_size=1500, chunk_overlap=100)
    documents = text_splitter.split_documents(data)

    print("Loading embedding model sentence-transformers/all-MiniLM-L6-v2")
    embedder = HuggingFaceEmbeddings(model_name="sentence-transformers/all-MiniLM-L6-v2")

    print("Adding documents to Chroma, this may take a while")
    _ = Chroma.from_documents(
        documents=documents,
        embedding=embedder,
        collection_name="xeon-rag",
        persist_directory=INDEX_DIR,
    )
    print("Done preprocessing. Created Chroma vector store.")


if __name__ == "__main__":
    ingest_documents()
# Run once before starting the server so the retriever has an index to query.
# Run once before starting the server so the retriever has an index to query.
####################################################
