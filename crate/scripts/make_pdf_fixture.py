"""Write an uncompressed multi-page PDF used by the CLI extraction tests."""

import sys

from reportlab.lib.pagesizes import A4
from reportlab.pdfgen import canvas


def main(path):
    c = canvas.Canvas(path, pagesize=A4, pageCompression=0, invariant=1)
    c.setTitle("fixture")
    for page in range(40):
        c.setFont(["Helvetica", "Times-Roman", "Courier"][page % 3], 11)
        c.drawString(72, 760, f"Page {page + 1}")
        c.linkURL(f"https://example.org/{page}", (72, 700, 200, 720))
        c.bookmarkPage(f"p{page}")
        c.addOutlineEntry(f"Page {page + 1}", f"p{page}", level=0)
        c.showPage()
    c.save()


if __name__ == "__main__":
    main(sys.argv[1])
