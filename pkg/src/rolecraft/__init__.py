"""Training-free role-playing chat engine.

Given the raw text of a book, the engine extracts a persona profile,
a graph-shaped memory and a speaking-style card for one character, then
answers chat messages in that character's voice through a three-stage
pipeline (draft, memory check, style transfer).
"""

__version__ = "0.1.0"
