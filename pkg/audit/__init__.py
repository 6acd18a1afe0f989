# Rarefy Audit Package
# Append-only oracle transcripts.
