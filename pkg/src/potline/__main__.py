"""Allow running as: python -m potline"""

from .cli import main

main()
