from langchain_community.embeddings.huggingface import HuggingFaceEmbeddings
from langchain_community.embeddings.openai import OpenAIEmbeddings
from langchain_community.embeddings.sentence_transformer import SentenceTransformerEmbeddings

__all__ = ["HuggingFaceEmbeddings", "OpenAIEmbeddings", "SentenceTransformerEmbeddings"]
