# SCMN-desk application package
